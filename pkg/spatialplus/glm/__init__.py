# Copyright 2024 The Spatialplus Authors
# SPDX-License-Identifier: GPL-3.0-or-later

from spatialplus.glm.families import FAMILIES, ExponentialFamily, get_family  # noqa
from spatialplus.glm.pirls import PirlsFit, PirlsState, run_pirls  # noqa
from spatialplus.glm.models import (  # noqa
    fit_glm_null, fit_glm_rsr, fit_glm_spatial, fit_glm_spatial_plus, simulate_glm_response
)
