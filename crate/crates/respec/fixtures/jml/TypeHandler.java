package org.apache.commons.cli;

public class TypeHandler {
    //@ ensures \result.doubleValue() = Double.parseDouble(str);
    public static Number createNumber(String str) {
        try {
            return NumberUtils.createNumber(str);
        } catch (NumberFormatException e) {
            System.err.println(e.getMessage());
        }
        return null;
    }
}
