// Copyright 2026 The biasprobe Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "biasprobe/binary_io.hpp"
#include "biasprobe/bundle.hpp"
#include "biasprobe/concepts.hpp"
#include "biasprobe/config.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/mitigate.hpp"
#include "biasprobe/model.hpp"
#include "biasprobe/nmf.hpp"
#include "biasprobe/nnls.hpp"
#include "biasprobe/parallel.hpp"
#include "biasprobe/pipeline.hpp"
#include "biasprobe/probe.hpp"
#include "biasprobe/report.hpp"
#include "biasprobe/rng.hpp"
#include "biasprobe/stats.hpp"
