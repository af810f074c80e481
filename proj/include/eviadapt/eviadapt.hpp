#pragma once

#include "eviadapt/autodiff.hpp"
#include "eviadapt/checkpoint.hpp"
#include "eviadapt/config.hpp"
#include "eviadapt/data.hpp"
#include "eviadapt/encoder.hpp"
#include "eviadapt/evaluation.hpp"
#include "eviadapt/evidential_head.hpp"
#include "eviadapt/losses.hpp"
#include "eviadapt/optim.hpp"
#include "eviadapt/pipeline.hpp"
#include "eviadapt/staging.hpp"
