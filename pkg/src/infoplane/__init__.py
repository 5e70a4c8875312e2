"""Plane detection in depth images by minimising model information.

Typical use::

    from infoplane import sensor, information, detector
    cloud = sensor.unproject(img, spec)
    ctx = information.InfoContext.from_range(R, spec.epsilon, noise)
    result = detector.detect(cloud, ctx, detector.DetectorConfig(seed=0))
"""

__version__ = "0.1.0"
