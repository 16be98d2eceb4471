#pragma once

#include "gradflow/config.hpp"
#include "gradflow/core.hpp"
#include "gradflow/euclidean.hpp"
#include "gradflow/fokker_planck.hpp"
#include "gradflow/functionals.hpp"
#include "gradflow/grid.hpp"
#include "gradflow/io.hpp"
#include "gradflow/objective.hpp"
#include "gradflow/product.hpp"
#include "gradflow/runner.hpp"
#include "gradflow/verify.hpp"
