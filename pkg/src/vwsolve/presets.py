"""Built-in scenarios, stored in the same text format that ``vwsolve run`` reads."""

from __future__ import annotations

HEAVISIDE_2X2 = """
[scenario]
name = heaviside_2x2
experiments = solve, h3, moderateness

[system]
n = 1
T = 1.0
sobolev_s = 0
lam1 = H(x)
lam2 = H(x)
a12 = 0; 0.2*bump(x,0,3)
l11 = 0.1*bump(x,0,4)
l12 = 0.3*bump(x,0,4)
l21 = 0.5*bump(x,0,4)
l22 = 0.1*bump(x,0,4)
g1 = bump(x,-1,2.5)
g2 = bump(x,0.5,2.5)

[scale]
kind = log

[solve]
L = 8
N = 256
steps = 128
eps_max = 0.3
ratio = 0.5
count = 8
"""

TIME_DIRAC = """
[scenario]
name = time_dirac
experiments = solve, h3

[system]
n = 1
T = 1.0
sobolev_s = 0
lam1 = delta(t-0.5)
lam2 = 0.5*delta(t-0.5)
a12 = 0
l11 = 0
l12 = 0.005*bump(x,0,4)
l21 = 0.02*bump(x,0,4)
l22 = 0.5*H(t-0.25)
g1 = bump(x,0,2)
g2 = 0.5*bump(x,0,2)

[scale]
kind = power
a = 1
c = 1

[scale.l22]
kind = log

[solve]
L = 8
N = 256
steps = 128
eps_max = 0.3
ratio = 0.5
count = 8
"""

SMOOTH_CONSISTENCY = """
[scenario]
name = smooth_consistency
experiments = consistency, moderateness

[system]
n = 1
T = 1.0
sobolev_s = 0
lam1 = 0.8+0.4*bump(x,0,3)
lam2 = -0.5+0.3*bump(x,1,3)
a12 = 0.2*bump(x,0,3); 0.1*bump(x,0,3)
l11 = 0.2*bump(x,0,3)
l12 = 0.3*bump(x,-1,3)
l21 = 0.4*bump(x,1,3)
l22 = 0.1*bump(x,0,3)
g1 = bump(x,0,2.5)
g2 = 0.5*bump(x,0.5,2.5)

[scale]
kind = power
a = 1
c = 1

[solve]
L = 8
N = 256
steps = 128
mode = full
eps_max = 0.3
ratio = 0.5
count = 6
"""

SCALAR_TRANSPORT = """
[scenario]
name = scalar_transport
experiments = solve, eikonal, moderateness

[system]
n = 1
T = 1.0
sobolev_s = 0
lam1 = H(x)
lam2 = 0
g1 = bump(x,-1,2)

[scale]
kind = log

[solve]
L = 8
N = 256
steps = 128
eps_max = 0.3
ratio = 0.5
count = 8
"""

PRESETS = {
    "heaviside_2x2": HEAVISIDE_2X2,
    "time_dirac": TIME_DIRAC,
    "smooth_consistency": SMOOTH_CONSISTENCY,
    "scalar_transport": SCALAR_TRANSPORT,
}
