package org.ofdrw.paint;

public interface Paint {
    String describe();
}
