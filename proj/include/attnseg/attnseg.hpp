/* Copyright 2026 The attnseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include "attnseg/aggregation.hpp"
#include "attnseg/attention_map.hpp"
#include "attnseg/bench.hpp"
#include "attnseg/bundle.hpp"
#include "attnseg/config.hpp"
#include "attnseg/correlation.hpp"
#include "attnseg/error.hpp"
#include "attnseg/eval.hpp"
#include "attnseg/fixture.hpp"
#include "attnseg/oracle.hpp"
#include "attnseg/stage_dump.hpp"
#include "attnseg/tensor.hpp"
