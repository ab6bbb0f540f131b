#pragma once

#include "advret/attack/perturbation.hpp"
#include "advret/config.hpp"
#include "advret/core/errors.hpp"
#include "advret/core/hash.hpp"
#include "advret/core/rng.hpp"
#include "advret/core/tensor.hpp"
#include "advret/data/image_io.hpp"
#include "advret/data/manifest.hpp"
#include "advret/data/toy_data.hpp"
#include "advret/eval/harness.hpp"
#include "advret/eval/report.hpp"
#include "advret/nn/discriminator.hpp"
#include "advret/nn/generator.hpp"
#include "advret/nn/layers.hpp"
#include "advret/nn/module.hpp"
#include "advret/objectives.hpp"
#include "advret/target/aggregation.hpp"
#include "advret/target/target_io.hpp"
#include "advret/target/target_model.hpp"
#include "advret/target/toy_target.hpp"
#include "advret/train/adam.hpp"
#include "advret/train/checkpoint.hpp"
#include "advret/train/trainer.hpp"
