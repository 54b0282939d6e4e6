#pragma once

// Umbrella header for the whole simulator.

#include "agentflow/beliefs.hpp"
#include "agentflow/dfg.hpp"
#include "agentflow/engine.hpp"
#include "agentflow/errors.hpp"
#include "agentflow/fusion.hpp"
#include "agentflow/io.hpp"
#include "agentflow/policy.hpp"
#include "agentflow/reconfig.hpp"
#include "agentflow/rng.hpp"
#include "agentflow/runner.hpp"
#include "agentflow/scenarios.hpp"
#include "agentflow/system.hpp"
#include "agentflow/trace.hpp"
