#pragma once

#include "covariance.hpp"
#include "data.hpp"
#include "error.hpp"
#include "geo.hpp"
#include "harness.hpp"
#include "inference.hpp"
#include "mra.hpp"
#include "optimize.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "partition.hpp"
#include "skew_normal.hpp"
#include "sparse.hpp"
