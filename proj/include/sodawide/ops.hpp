#pragma once

#include "sodawide/ops/attention.hpp"
#include "sodawide/ops/conv.hpp"
#include "sodawide/ops/elementwise.hpp"
#include "sodawide/ops/norm.hpp"
#include "sodawide/ops/pool.hpp"
#include "sodawide/ops/resample.hpp"
