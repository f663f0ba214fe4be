#pragma once

#include "lmo/analysis.hpp"
#include "lmo/budget.hpp"
#include "lmo/egd.hpp"
#include "lmo/error.hpp"
#include "lmo/harness.hpp"
#include "lmo/methods.hpp"
#include "lmo/mixing_laws.hpp"
#include "lmo/serialization.hpp"
#include "lmo/simplex.hpp"
#include "lmo/trainer.hpp"
