package org.example.text;

public final class Slug {
    private Slug() {
    }

    public static String slugify(String title) {
        String s = collapse(title.trim().toLowerCase());
        return s.replace(' ', '_');
    }

    static String collapse(String s) {
        return s.replaceAll("\\s+", " ");
    }
}
