#pragma once

#include "nlcs/errors.hpp"
#include "nlcs/random.hpp"
#include "nlcs/model.hpp"
#include "nlcs/observe.hpp"
#include "nlcs/geometry.hpp"
#include "nlcs/solver.hpp"
#include "nlcs/analysis.hpp"
#include "nlcs/harness.hpp"
