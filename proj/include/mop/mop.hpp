#pragma once

// Umbrella header. The HTTP provider lives in mop/http_client.hpp and is not
// pulled in here to keep offline builds light.

#include "mop/assignment.hpp"
#include "mop/clustering.hpp"
#include "mop/core.hpp"
#include "mop/errors.hpp"
#include "mop/harness.hpp"
#include "mop/providers.hpp"
#include "mop/routing.hpp"
#include "mop/scoring.hpp"
#include "mop/scripted_world.hpp"
