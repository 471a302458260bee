"""DiracLab 配置文件"""
import os

# 项目根目录
BASE_DIR = os.path.dirname(os.path.abspath(__file__))

VERSION = "1.0.0"

# ============ 输出目录 ============
# 每次运行一个子目录 (runs/<name>/)
RUNS_DIR = os.path.join(BASE_DIR, "runs")

# 示例配置目录
CONFIGS_DIR = os.path.join(BASE_DIR, "configs")

# ============ 模型常数估计 ============
# 随机采样点数（常数 c, c★ 的最大化）
CONSTANT_SAMPLES = 1_000_000
# (A2) 残差采样点数
A2_SAMPLES = 10_000
# 采样盒：|u|, |v| <= SAMPLE_BOX（实部/虚部均匀分布）
SAMPLE_BOX = 10.0
# 分块大小，避免一次性分配过大数组
SAMPLE_CHUNK = 200_000
# 自定义模型 (A2) 相对残差上限
A2_REL_TOLERANCE = 1e-12
# c = 0 时 delta 的上限
DELTA_CAP = 1e6
# 采样比值超过该值视为无界
RATIO_CEILING = 1e12
DEFAULT_SEED = 20240607

# ============ 格式与数值 ============
MIN_CELLS = 8
# 流出单元允许的最大幅值（光锥检查）
OUTFLOW_EPS = 1e-14
# 暴力 O(N^2) 泛函的规模上限
BRUTE_FORCE_MAX_CELLS = 4096
# 不等式容差的相对尺度
INEQUALITY_REL_TOL = 1e-6
# 相位积分的自适应求积容差
ORACLE_QUAD_TOL = 1e-12
# 耦合参考解的 RK4 步长（四阶，耦合项光滑）
REFERENCE_STEP = 5e-4
# 耦合参考解细网格的最大间距
SPECTRAL_DX = 0.05

# ============ 运行默认值 ============
DEFAULT_STRIDE = 10
DEFAULT_SUBSTEP_ORDER = "strang"
DEFAULT_INTEGRATOR = "exact_preset"
DEFAULT_CONES = 100
DEFAULT_CAUCHY_MEMBERS = 6
DEFAULT_REFINEMENT_LEVELS = 4

# ============ 退出码 ============
EXIT_OK = 0
EXIT_VERDICT_FAILED = 2
EXIT_CONFIG_ERROR = 3
EXIT_NUMERICAL_ABORT = 4
