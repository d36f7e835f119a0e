package org.ofdrw.paint;

public class RadialGradientPaint extends MultipleGradientPaint {
    public RadialGradientPaint(float[] fractions) {
        super(fractions);
    }

    @Override
    public String describe() {
        return "radial(" + stops() + ")";
    }
}
