#pragma once

#include "dbridge/analysis.hpp"
#include "dbridge/benchmark.hpp"
#include "dbridge/bridge_approx.hpp"
#include "dbridge/bridge_exact.hpp"
#include "dbridge/errors.hpp"
#include "dbridge/inference.hpp"
#include "dbridge/io.hpp"
#include "dbridge/model.hpp"
#include "dbridge/model_spec.hpp"
#include "dbridge/numerics.hpp"
#include "dbridge/optimize.hpp"
#include "dbridge/ou_oracle.hpp"
#include "dbridge/parallel.hpp"
#include "dbridge/path.hpp"
#include "dbridge/rng.hpp"
#include "dbridge/schemes.hpp"
#include "dbridge/stats.hpp"
