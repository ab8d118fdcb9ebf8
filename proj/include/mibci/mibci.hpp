#pragma once

#include "mibci/belief.hpp"
#include "mibci/config.hpp"
#include "mibci/environment.hpp"
#include "mibci/harness.hpp"
#include "mibci/inference.hpp"
#include "mibci/model.hpp"
#include "mibci/physiology.hpp"
#include "mibci/rng.hpp"
