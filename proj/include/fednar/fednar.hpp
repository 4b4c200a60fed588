#pragma once

#include "fednar/errors.hpp"
#include "fednar/numkit.hpp"
#include "fednar/models.hpp"
#include "fednar/data.hpp"
#include "fednar/local_engine.hpp"
#include "fednar/server_engine.hpp"
#include "fednar/config.hpp"
#include "fednar/experiment.hpp"
#include "fednar/self_check.hpp"
