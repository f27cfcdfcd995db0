#pragma once

#include "dslfm/errors.hpp"
#include "dslfm/parallel.hpp"
#include "dslfm/stats.hpp"
#include "dslfm/panel.hpp"
#include "dslfm/regress.hpp"
#include "dslfm/dsl.hpp"
#include "dslfm/factor_model.hpp"
#include "dslfm/risk_premium.hpp"
#include "dslfm/aptests.hpp"
#include "dslfm/simulate.hpp"
#include "dslfm/backtest.hpp"
#include "dslfm/io.hpp"
