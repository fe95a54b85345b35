package com.fasterxml.jackson.databind.type;

public class ReferenceType {
    private final Class<?> _class;
    private final Class<?> _referencedType;

    public ReferenceType(Class<?> cls, Class<?> referencedType) {
        _class = cls;
        _referencedType = referencedType;
    }

    public String buildCanonicalName() {
        StringBuilder sb = new StringBuilder();
        sb.append(_class.getName());
        sb.append('<');
        sb.append(_referencedType.getName());
        return sb.toString();
    }
}
