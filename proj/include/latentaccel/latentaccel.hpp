#pragma once

#include "latentaccel/core.hpp"
#include "latentaccel/flow_model.hpp"
#include "latentaccel/harness.hpp"
#include "latentaccel/norm_fusion.hpp"
#include "latentaccel/ring_buffer.hpp"
#include "latentaccel/taylor_predictor.hpp"
#include "latentaccel/window_scheduler.hpp"
