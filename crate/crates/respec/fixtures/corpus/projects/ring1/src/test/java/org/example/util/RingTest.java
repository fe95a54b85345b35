package org.example.util;

import static org.junit.Assert.assertEquals;

import org.junit.Test;

public class RingTest {
    @Test
    public void testFirst() {
        assertEquals(1, Ring.first(new int[] {1, 2, 3}));
    }

    @Test
    public void testLast() {
        assertEquals(3, Ring.last(new int[] {1, 2, 3}));
    }
}
