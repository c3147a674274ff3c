"""Independent reference values for the calibration and label fixtures.

Run from this directory: python3 calib_oracle.py
"""
import numpy as np


def load(path):
    out = {}
    for line in open(path):
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip()] = np.array([float(x) for x in v.split()])
    return out


c = load("calib.txt")
P2 = c["P2"].reshape(3, 4)
R0 = np.eye(4)
R0[:3, :3] = c["R0_rect"].reshape(3, 3)
Tr = np.eye(4)
Tr[:3, :] = c["Tr_velo_to_cam"].reshape(3, 4)
velo_to_rect = R0 @ Tr
rect_to_velo = np.linalg.inv(velo_to_rect)

for line in open("labels.txt"):
    f = line.split()
    if f[0] == "DontCare":
        continue
    h, w, l = map(float, f[8:11])
    x, y, z = map(float, f[11:14])
    ry = float(f[14])
    center = rect_to_velo @ np.array([x, y - h / 2, z, 1.0])
    yaw = -ry - np.pi / 2
    yaw = np.arctan2(np.sin(yaw), np.cos(yaw))
    print(f[0], repr(float(center[0])), repr(float(center[1])), repr(float(center[2])), repr(float(yaw)))

point = np.array([20.0, -3.0, 0.5, 1.0])
img = P2 @ velo_to_rect @ point
print("project", repr(float(img[0] / img[2])), repr(float(img[1] / img[2])), repr(float(img[2])))
