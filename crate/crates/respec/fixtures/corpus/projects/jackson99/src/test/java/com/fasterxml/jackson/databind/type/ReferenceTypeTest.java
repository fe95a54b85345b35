package com.fasterxml.jackson.databind.type;

import static org.junit.Assert.assertEquals;

import java.util.concurrent.atomic.AtomicReference;

import org.junit.Test;

public class ReferenceTypeTest {
    @Test
    public void testCanonicalNames() {
        ReferenceType t = new ReferenceType(AtomicReference.class, String.class);
        assertEquals("java.util.concurrent.atomic.AtomicReference<java.lang.String>", t.buildCanonicalName());
    }
}
