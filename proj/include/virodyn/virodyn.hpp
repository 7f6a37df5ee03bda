#pragma once

#include "grid.hpp"
#include "model.hpp"
#include "envelopes.hpp"
#include "stepper.hpp"
#include "diagnostics.hpp"
#include "scenarios.hpp"
