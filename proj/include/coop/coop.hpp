#pragma once

#include "coop/tensor.hpp"
#include "coop/ops.hpp"
#include "coop/attention.hpp"
#include "coop/geometry.hpp"
#include "coop/bev_encoder.hpp"
#include "coop/fusion.hpp"
#include "coop/perception.hpp"
#include "coop/motion.hpp"
#include "coop/accident.hpp"
#include "coop/config.hpp"
#include "coop/scenario.hpp"
#include "coop/render.hpp"
#include "coop/pipeline.hpp"
#include "coop/evaluate.hpp"
#include "coop/plot.hpp"
