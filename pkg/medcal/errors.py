"""
MEDCAL 例外定義

ライブラリ全体で使う例外階層。CLI はここでの型を見て終了コードを決める
（ValidationError / ArbitrageError → 2、その他 → 1）。
"""

from typing import List, Optional


class MedcalError(Exception):
    """全例外の基底クラス"""


class ValidationError(MedcalError):
    """クォート・スライスの検証エラー（違反リストを保持）"""

    def __init__(self, message: str, violations: Optional[List] = None):
        self.violations = list(violations or [])
        if self.violations:
            details = "; ".join(str(v) for v in self.violations)
            message = f"{message}: {details}"
        super().__init__(message)


class ArbitrageError(MedcalError):
    """バケット単位の裁定条件違反"""

    def __init__(self, message: str, bucket: Optional[int] = None):
        self.bucket = bucket
        if bucket is not None:
            message = f"bucket {bucket}: {message}"
        super().__init__(message)


class DomainError(MedcalError, ValueError):
    """引数が定義域外"""


class MissingForward(MedcalError):
    """フォワードが与えられず K=0 のクォートも無い"""


class BoundaryStrike(MedcalError):
    """コールスプレッドの隣接ストライクが存在しない"""


class IntegrabilityError(MedcalError):
    """密度が [0, inf) で可積分でない（sum(lambda) >= 0）"""


class NonConvergence(MedcalError):
    """反復ソルバーが収束しない"""

    def __init__(self, message: str, residual: float = float("nan"),
                 iterations: int = 0, bucket: Optional[int] = None):
        self.residual = residual
        self.iterations = iterations
        self.bucket = bucket
        prefix = f"bucket {bucket}: " if bucket is not None else ""
        super().__init__(f"{prefix}{message} (best residual {residual:.3e} "
                         f"after {iterations} iterations)")


class OutOfRange(MedcalError):
    """価格が無裁定の範囲外（インプライド・ボラティリティ逆算不能）"""


class ConfigError(MedcalError):
    """設定ファイルの不正"""


class QuoteFileError(MedcalError):
    """クォートファイルの読み込み・解析エラー"""
