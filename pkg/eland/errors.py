from typing import Optional


class ElandError(Exception):
    """
    所有 ELAND 例外的基底類別。
    exit_code 的角色如同 HTTPException 的 status_code：CLI 的全域處理器據此決定結束碼。
    """

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class DataValidationError(ElandError, ValueError):
    """輸入資料不合法 (id 超出範圍、檔案格式錯誤)"""

    exit_code = 2


class ParameterError(ElandError, ValueError):
    """數值參數超出允許範圍"""

    exit_code = 2


class DimensionError(ElandError, ValueError):
    """張量形狀不符，訊息中會指出是哪一個張量或哪一層"""

    exit_code = 2


class DegenerateVectorError(ElandError, ArithmeticError):
    """cosine similarity 的輸入向量範數為 0"""

    exit_code = 2


class ConfigurationError(ElandError):
    exit_code = 2


class EvaluationError(ElandError, ArithmeticError):
    """目標函數出現 NaN/Inf"""

    exit_code = 1


class MetricUndefinedError(ElandError, ValueError):
    """標籤只有單一類別時 AUC/AP 無定義"""

    exit_code = 3
