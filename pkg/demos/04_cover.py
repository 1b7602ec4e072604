"""How many attractor segments sit over one driving phase?  One for the
contracting forced model, two for the symmetric bistable one.

Several runs start from different constant histories at the same phase, so
at a common sample time they all sit over the same phase exactly.
"""

import numpy as np

from sdde_lyap import Phase, Segment, cover_detect, get_preset, omega_limit_sample

for name, starts, probe, tol in (("m3", [-1.0, 0.0, 0.5, 1.0], 45.0, 1e-3),
                                 ("m4", [-1.0, -0.5, 0.5, 1.0], 35.0, 1e-2)):
    model = get_preset(name)
    theta = Phase(np.zeros(model.driving.dim))
    runs = [omega_limit_sample(model, theta, Segment.constant(model.r, np.full(model.dim, c)),
                               30.0, 20.0, 0.5) for c in starts]
    rep = cover_detect(model, model.driving.advance(theta, probe), runs,
                       return_tol=1e-9, cluster_tol=tol)
    print(f"{name}: k = {rep.k}, cluster sizes {rep.sizes}, separation {rep.min_separation}")
