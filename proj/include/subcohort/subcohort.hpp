#pragma once

#include "subcohort/common.hpp"
#include "subcohort/cohort.hpp"
#include "subcohort/cohort_io.hpp"
#include "subcohort/config.hpp"
#include "subcohort/covariate_process.hpp"
#include "subcohort/csv.hpp"
#include "subcohort/experiment.hpp"
#include "subcohort/information.hpp"
#include "subcohort/mcmc.hpp"
#include "subcohort/model.hpp"
#include "subcohort/posterior_io.hpp"
#include "subcohort/report.hpp"
#include "subcohort/selection.hpp"
#include "subcohort/simulate.hpp"
#include "subcohort/weibull.hpp"
