#pragma once

#include "episir/calib.hpp"
#include "episir/common.hpp"
#include "episir/estimate.hpp"
#include "episir/group_spec.hpp"
#include "episir/moments.hpp"
#include "episir/netgen.hpp"
#include "episir/policy.hpp"
#include "episir/series.hpp"
#include "episir/simcore.hpp"
