#ifndef LPGFLOW_LPGFLOW_HPP
#define LPGFLOW_LPGFLOW_HPP

#include "lpgflow/checkpoint.hpp"
#include "lpgflow/common.hpp"
#include "lpgflow/config.hpp"
#include "lpgflow/eval.hpp"
#include "lpgflow/flow.hpp"
#include "lpgflow/gradcheck.hpp"
#include "lpgflow/image.hpp"
#include "lpgflow/lora.hpp"
#include "lpgflow/lpg.hpp"
#include "lpgflow/model.hpp"
#include "lpgflow/ops.hpp"
#include "lpgflow/optim.hpp"
#include "lpgflow/pipeline.hpp"
#include "lpgflow/png_io.hpp"
#include "lpgflow/rng.hpp"
#include "lpgflow/taskdata.hpp"
#include "lpgflow/tensor.hpp"

#endif
