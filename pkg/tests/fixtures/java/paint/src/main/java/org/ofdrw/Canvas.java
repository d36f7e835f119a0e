package org.ofdrw;

import org.ofdrw.paint.Color;
import org.ofdrw.paint.Paint;

public class Canvas {
    private Paint paint = new Color(0);

    public void setPaint(Paint paint) {
        if (paint == null) {
            throw new IllegalArgumentException("paint");
        }
        this.paint = paint;
    }

    public void fillRect(double x, double y, double w, double h) {
        record("rect");
    }

    public void fillOval(double x, double y, double w, double h) {
        record("oval");
    }

    private void record(String shape) {
        System.out.println(shape + " " + paint.describe());
    }
}
