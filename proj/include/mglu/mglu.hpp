// Copyright (c) 2026 The MGLU Authors. All Rights Reserved.
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

#include "mglu/activation.hpp"
#include "mglu/analysis.hpp"
#include "mglu/autograd.hpp"
#include "mglu/error.hpp"
#include "mglu/kernel.hpp"
#include "mglu/layer.hpp"
#include "mglu/masks.hpp"
#include "mglu/parallel.hpp"
#include "mglu/reference.hpp"
#include "mglu/serialize.hpp"
#include "mglu/tensor.hpp"
#include "mglu/trainer.hpp"
#include "mglu/traffic.hpp"
