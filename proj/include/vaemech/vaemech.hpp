#pragma once

#include "vaemech/core/error.hpp"
#include "vaemech/core/rng.hpp"
#include "vaemech/core/tensor.hpp"
#include "vaemech/autodiff/tape.hpp"
#include "vaemech/autodiff/ops.hpp"
#include "vaemech/autodiff/optim.hpp"
#include "vaemech/model/config.hpp"
#include "vaemech/model/vae.hpp"
#include "vaemech/model/discriminator.hpp"
#include "vaemech/model/loss.hpp"
#include "vaemech/model/train.hpp"
#include "vaemech/data/factors.hpp"
#include "vaemech/data/synthetic.hpp"
#include "vaemech/data/render.hpp"
#include "vaemech/data/npz.hpp"
#include "vaemech/data/dsprites.hpp"
#include "vaemech/data/dataset.hpp"
#include "vaemech/io/pgm.hpp"
#include "vaemech/intervention/engine.hpp"
#include "vaemech/metrics/metrics.hpp"
#include "vaemech/circuits/circuits.hpp"
#include "vaemech/harness/config.hpp"
#include "vaemech/harness/checkpoint.hpp"
#include "vaemech/harness/schema.hpp"
#include "vaemech/harness/pipeline.hpp"
#include "vaemech/harness/compare.hpp"
