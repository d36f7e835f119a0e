package org.ofdrw.paint;

public class GradientPaint implements Paint {
    @Override
    public String describe() {
        return "gradient";
    }
}
