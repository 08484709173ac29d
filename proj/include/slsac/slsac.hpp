#pragma once

#include "slsac/errors.hpp"
#include "slsac/norm.hpp"
#include "slsac/lp.hpp"
#include "slsac/polytope.hpp"
#include "slsac/model.hpp"
#include "slsac/estimation.hpp"
#include "slsac/encode.hpp"
#include "slsac/sls.hpp"
#include "slsac/synthesis.hpp"
#include "slsac/simulator.hpp"
#include "slsac/trace.hpp"
