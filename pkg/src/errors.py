"""
錯誤類別定義
所有模組共用的例外階層，每個類別帶有對應的 CLI 結束碼
"""


class MicleError(Exception):
    """所有可預期錯誤的基底類別"""

    exit_code = 1


class UsageError(MicleError):
    """命令列參數錯誤"""

    exit_code = 1


class ConfigError(MicleError, ValueError):
    """設定檔或超參數錯誤"""

    exit_code = 2


class ValidationError(MicleError, ValueError):
    """資料驗證錯誤"""

    exit_code = 2


class ManifestParseError(ValidationError):
    """清單檔解析錯誤（帶行號）"""

    def __init__(self, path: str, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class ManifestValidationError(ValidationError):
    """清單內容驗證錯誤（帶 bag_id）"""

    def __init__(self, bag_id: str, message: str):
        self.bag_id = bag_id
        super().__init__(f"bag '{bag_id}': {message}")


class ImageDecodeError(ValidationError):
    """影像解碼錯誤"""


class CheckpointError(ValidationError):
    """檢查點版本、名稱或形狀不符"""


class DimensionError(MicleError, ValueError):
    """張量形狀不符"""

    exit_code = 2


class ContractError(MicleError, RuntimeError):
    """呼叫前置條件不成立"""

    exit_code = 2


class DomainError(MicleError, ValueError):
    """數值超出函數定義域"""

    exit_code = 3


class NumericError(MicleError, ArithmeticError):
    """NaN / Inf 等數值錯誤"""

    exit_code = 3


class DivergenceError(NumericError):
    """訓練發散（損失非有限值或超過門檻）"""

    def __init__(self, step: int, loss: float, snapshot_path: str = ""):
        self.step = step
        self.loss = loss
        self.snapshot_path = snapshot_path
        detail = f", snapshot: {snapshot_path}" if snapshot_path else ""
        super().__init__(f"training diverged at step {step} (loss={loss}){detail}")


class UndefinedMetricError(MicleError, ValueError):
    """指標在輸入上無定義（例如單一類別的 AUC）"""

    exit_code = 2


class EndOfEpoch(MicleError):
    """取樣器本輪已無足夠樣本"""


__all__ = [
    'MicleError',
    'UsageError',
    'ConfigError',
    'ValidationError',
    'ManifestParseError',
    'ManifestValidationError',
    'ImageDecodeError',
    'CheckpointError',
    'DimensionError',
    'ContractError',
    'DomainError',
    'NumericError',
    'DivergenceError',
    'UndefinedMetricError',
    'EndOfEpoch',
]
