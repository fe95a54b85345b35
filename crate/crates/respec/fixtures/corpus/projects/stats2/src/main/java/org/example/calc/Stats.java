package org.example.calc;

public final class Stats {
    private Stats() {
    }

    public static int clamp(int v, int lo, int hi) {
        if (v < lo) {
            return hi;
        }
        if (v > hi) {
            return lo;
        }
        return v;
    }

    public static int sum(int[] values) {
        int s = 0;
        for (int v : values) {
            s += v;
        }
        return s;
    }
}
