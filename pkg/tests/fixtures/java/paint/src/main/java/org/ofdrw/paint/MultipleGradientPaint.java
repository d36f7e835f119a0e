package org.ofdrw.paint;

public abstract class MultipleGradientPaint implements Paint {
    protected final float[] fractions;

    protected MultipleGradientPaint(float[] fractions) {
        this.fractions = fractions;
    }

    public int stops() {
        return fractions.length;
    }
}
