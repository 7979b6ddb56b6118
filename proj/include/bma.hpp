#pragma once

#include "bma/error.hpp"
#include "bma/random.hpp"
#include "bma/numerics.hpp"
#include "bma/dataset.hpp"
#include "bma/priors.hpp"
#include "bma/modelspace.hpp"
#include "bma/likelihood.hpp"
#include "bma/quadrature.hpp"
#include "bma/diagnostics.hpp"
#include "bma/inference.hpp"
#include "bma/averaging.hpp"
#include "bma/report.hpp"
#include "bma/svg.hpp"
#include "bma/config.hpp"
