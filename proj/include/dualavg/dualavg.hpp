#pragma once

#include "dualavg/errors.hpp"
#include "dualavg/rng.hpp"
#include "dualavg/feasible_set.hpp"
#include "dualavg/proximal.hpp"
#include "dualavg/objectives.hpp"
#include "dualavg/table.hpp"
#include "dualavg/monitor.hpp"
#include "dualavg/cda.hpp"
#include "dualavg/network.hpp"
#include "dualavg/dda.hpp"
#include "dualavg/ratefit.hpp"
#include "dualavg/instance_io.hpp"
#include "dualavg/experiment.hpp"
