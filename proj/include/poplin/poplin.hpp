// Copyright 2026 The POPLIN Toolkit Authors
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

#include "poplin/agent.hpp"
#include "poplin/analysis.hpp"
#include "poplin/cem.hpp"
#include "poplin/common.hpp"
#include "poplin/config.hpp"
#include "poplin/distill.hpp"
#include "poplin/dynamics.hpp"
#include "poplin/envs.hpp"
#include "poplin/net.hpp"
#include "poplin/planner.hpp"
#include "poplin/record.hpp"
#include "poplin/rollout.hpp"
#include "poplin/surface.hpp"
