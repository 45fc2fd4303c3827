#pragma once

// Umbrella header for the NR positioning simulation library.

#include "nrpos/aggregation.hpp"
#include "nrpos/angles.hpp"
#include "nrpos/carrier_phase.hpp"
#include "nrpos/channel.hpp"
#include "nrpos/errors.hpp"
#include "nrpos/fft.hpp"
#include "nrpos/geometry.hpp"
#include "nrpos/harness.hpp"
#include "nrpos/measurements.hpp"
#include "nrpos/resource_grid.hpp"
#include "nrpos/rng.hpp"
#include "nrpos/scenario.hpp"
#include "nrpos/sidelink.hpp"
#include "nrpos/solvers.hpp"
#include "nrpos/stitching.hpp"
#include "nrpos/zadoff_chu.hpp"
