package org.ofdrw.paint;

public class Color implements Paint {
    private final int rgb;

    public Color(int rgb) {
        this.rgb = rgb;
    }

    @Override
    public String describe() {
        return "solid";
    }
}
