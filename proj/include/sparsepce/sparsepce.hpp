#pragma once

#include "basis_spec.hpp"
#include "diagnostics.hpp"
#include "estimators.hpp"
#include "experiment.hpp"
#include "measurement.hpp"
#include "multiindex.hpp"
#include "polybasis.hpp"
#include "rng.hpp"
#include "solvers.hpp"
