#pragma once

#include "debias/random.hpp"
#include "debias/errors.hpp"
#include "debias/sampling.hpp"
#include "debias/core.hpp"
#include "debias/func_mean.hpp"
#include "debias/ratio.hpp"
#include "debias/quantile.hpp"
#include "debias/saa.hpp"
#include "debias/csv.hpp"
