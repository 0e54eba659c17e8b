#pragma once

#include "pseudolabel/car_models.hpp"
#include "pseudolabel/chamfer.hpp"
#include "pseudolabel/config.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/eval.hpp"
#include "pseudolabel/geometry.hpp"
#include "pseudolabel/kdtree.hpp"
#include "pseudolabel/kitti_io.hpp"
#include "pseudolabel/motion.hpp"
#include "pseudolabel/parallel.hpp"
#include "pseudolabel/pipeline.hpp"
#include "pseudolabel/refine.hpp"
#include "pseudolabel/scenario.hpp"
#include "pseudolabel/shapespace.hpp"
#include "pseudolabel/tracker.hpp"
