package org.apache.commons.codec.language;

public class Caverphone {

    public String caverphone(String txt) {
        if (txt == null || txt.length() == 0) {
            return "1111111111";
        }
        txt = txt.toLowerCase();
        txt = txt.replaceAll("[^a-z]", "");
        txt = txt.replaceAll("^cough", "cou2f");
        txt = txt.replaceAll("^rough", "rou2f");
        txt = txt.replaceAll("^mb", "m2");
        txt = txt.replaceAll("cq", "2q");
        txt = txt.replaceAll("ci", "si");
        txt = txt.replaceAll("b", "p");
        txt = txt.replaceAll("2", "");
        txt = txt + "1111111111";
        return txt.substring(0, 10).toUpperCase();
    }
}
