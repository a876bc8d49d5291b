#pragma once

#include "kdepi/data_pipeline.hpp"
#include "kdepi/distill_pool.hpp"
#include "kdepi/epi_core.hpp"
#include "kdepi/errors.hpp"
#include "kdepi/eval_report.hpp"
#include "kdepi/rng.hpp"
#include "kdepi/run_config.hpp"
#include "kdepi/student_net.hpp"
#include "kdepi/teacher_ensemble.hpp"
