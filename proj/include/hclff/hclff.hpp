#pragma once

#include "hclff/augment.hpp"
#include "hclff/checkpoint.hpp"
#include "hclff/common.hpp"
#include "hclff/config.hpp"
#include "hclff/data.hpp"
#include "hclff/hierarchy.hpp"
#include "hclff/inference.hpp"
#include "hclff/layers.hpp"
#include "hclff/objectives.hpp"
#include "hclff/ops.hpp"
#include "hclff/optim.hpp"
#include "hclff/run.hpp"
#include "hclff/tensor.hpp"
#include "hclff/trainer.hpp"
