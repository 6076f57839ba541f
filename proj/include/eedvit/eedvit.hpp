#pragma once

#include "eedvit/augment.hpp"
#include "eedvit/autodiff.hpp"
#include "eedvit/checkpoint.hpp"
#include "eedvit/config.hpp"
#include "eedvit/covariance.hpp"
#include "eedvit/data.hpp"
#include "eedvit/dino.hpp"
#include "eedvit/dump.hpp"
#include "eedvit/eigensolver.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/image.hpp"
#include "eedvit/io.hpp"
#include "eedvit/kv.hpp"
#include "eedvit/optim.hpp"
#include "eedvit/parameters.hpp"
#include "eedvit/profiler.hpp"
#include "eedvit/report.hpp"
#include "eedvit/rng.hpp"
#include "eedvit/spectral.hpp"
#include "eedvit/tensor.hpp"
#include "eedvit/trainer.hpp"
#include "eedvit/version.hpp"
#include "eedvit/vit.hpp"
