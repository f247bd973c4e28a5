#pragma once

#include "mtube/eval.hpp"
#include "mtube/geometry.hpp"
#include "mtube/gradcheck.hpp"
#include "mtube/kernels.hpp"
#include "mtube/linking.hpp"
#include "mtube/loss.hpp"
#include "mtube/model.hpp"
#include "mtube/rpn.hpp"
#include "mtube/training.hpp"
#include "mtube/harness/annotations.hpp"
#include "mtube/harness/audit.hpp"
#include "mtube/harness/config.hpp"
#include "mtube/harness/errors.hpp"
#include "mtube/harness/extractor.hpp"
#include "mtube/harness/frames_io.hpp"
#include "mtube/harness/model_io.hpp"
#include "mtube/harness/pairs.hpp"
#include "mtube/harness/pipeline.hpp"
#include "mtube/harness/preprocess.hpp"
#include "mtube/harness/report.hpp"
#include "mtube/harness/synth.hpp"
#include "mtube/harness/toy_training.hpp"
