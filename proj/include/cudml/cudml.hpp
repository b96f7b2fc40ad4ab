#pragma once

#include "cudml/csv.hpp"
#include "cudml/dataset.hpp"
#include "cudml/dgp.hpp"
#include "cudml/error.hpp"
#include "cudml/estimators.hpp"
#include "cudml/forest.hpp"
#include "cudml/matrix.hpp"
#include "cudml/random.hpp"
#include "cudml/simulation.hpp"
#include "cudml/tuning.hpp"
