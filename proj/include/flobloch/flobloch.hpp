#pragma once

#include "flobloch/action_angle.hpp"
#include "flobloch/artifacts.hpp"
#include "flobloch/band_solver.hpp"
#include "flobloch/config.hpp"
#include "flobloch/effective_model.hpp"
#include "flobloch/error.hpp"
#include "flobloch/estimation.hpp"
#include "flobloch/physical_propagator.hpp"
#include "flobloch/reduced_propagator.hpp"
#include "flobloch/scenario.hpp"
