package org.ofdrw.paint;

public class LinearGradientPaint extends MultipleGradientPaint {
    public LinearGradientPaint(float[] fractions) {
        super(fractions);
    }

    @Override
    public String describe() {
        return "linear(" + stops() + ")";
    }
}
