#pragma once

#include "cfx/cost.hpp"
#include "cfx/csv.hpp"
#include "cfx/errors.hpp"
#include "cfx/external.hpp"
#include "cfx/forest.hpp"
#include "cfx/harness.hpp"
#include "cfx/model_io.hpp"
#include "cfx/parallel.hpp"
#include "cfx/perturb.hpp"
#include "cfx/predictor.hpp"
#include "cfx/rng.hpp"
#include "cfx/schema.hpp"
#include "cfx/search.hpp"
#include "cfx/stats.hpp"
#include "cfx/synthetic.hpp"
