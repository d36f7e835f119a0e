package org.ofdrw.paint;

public class Broken {
    public void oops( {
        return
    }
}
