"""Locale-aware Liquid filters for benchmark reports."""
from __future__ import annotations

from decimal import Decimal
from functools import wraps
from typing import TYPE_CHECKING
from typing import Any
from typing import Callable
from typing import Optional
from typing import Tuple
from typing import cast

from babel import Locale
from babel import UnknownLocaleError
from babel import numbers
from babel import units
from liquid.context import is_undefined
from liquid.exceptions import FilterArgumentError
from liquid.filter import int_arg
from liquid.filter import num_arg
from liquid.filter import string_filter

if TYPE_CHECKING:
    from liquid import Context

    FilterT = Callable[..., Any]

# CLDR digital units, largest first.
BYTE_UNITS: Tuple[Tuple[int, str], ...] = (
    (1000**3, "digital-gigabyte"),
    (1000**2, "digital-megabyte"),
    (1000, "digital-kilobyte"),
    (1, "digital-byte"),
)


def number_filter(_filter: FilterT) -> FilterT:
    """A filter decorator that turns bad arguments into ``FilterArgumentError``."""

    @wraps(_filter)
    def wrapper(val: object, *args: Any, **kwargs: Any) -> Any:
        try:
            return _filter(val, *args, **kwargs)
        except (TypeError, ValueError, units.UnknownUnitError) as err:
            raise FilterArgumentError(err) from err

    return wrapper


def _to_decimal(val: object) -> Decimal:
    if isinstance(val, Decimal):
        return val
    if isinstance(val, int):
        return Decimal(val)
    # Floats go through their shortest repr, not their binary expansion.
    return Decimal(repr(float(num_arg(val, 0))))


class _LocaleFilter:
    with_context = True

    def __init__(
        self,
        *,
        locale_var: str = "locale",
        default_locale: str = "en_US",
    ) -> None:
        self.locale_var = locale_var
        self.default_locale = Locale.parse(default_locale)

    def _resolve_locale(self, context: Context) -> Locale:
        _locale = context.resolve(self.locale_var)
        if is_undefined(_locale):
            return self.default_locale
        try:
            return cast(Locale, Locale.parse(_locale))
        except (UnknownLocaleError, ValueError, TypeError):
            return self.default_locale


class Number(_LocaleFilter):
    """A Liquid filter for formatting throughputs, ratios and errors.

    ``{{ value | decimal }}`` uses the locale's grouping and decimal
    separators. ``{{ value | decimal: 2 }}`` shows exactly two fraction
    digits. ``{{ value | decimal: format: '0.0E0' }}`` uses a CLDR pattern.

    :param locale_var: The name of a render context variable that resolves to
        the current locale. Defaults to ``"locale"``.
    :param default_locale: A fallback locale used if ``locale_var`` can not be
        resolved. Defaults to ``"en_US"``.
    :param default_digits: Fraction digits used when none are given, or
        ``None`` to keep the value's own digits (up to the locale's limit).
    """

    def __init__(
        self,
        *,
        locale_var: str = "locale",
        default_locale: str = "en_US",
        default_digits: Optional[int] = None,
    ) -> None:
        super().__init__(locale_var=locale_var, default_locale=default_locale)
        self.default_digits = default_digits

    @number_filter
    def __call__(  # noqa: D102
        self,
        left: object,
        digits: object = None,
        *,
        context: Context,
        format: Optional[str] = None,  # noqa: A002
    ) -> str:
        locale = self._resolve_locale(context)
        value = _to_decimal(left)
        if format:
            formatted = numbers.format_decimal(value, format=format, locale=locale)
            return cast(str, formatted)

        places = int_arg(digits, 0) if digits is not None else self.default_digits
        if places is None:
            return cast(str, numbers.format_decimal(value, locale=locale))
        pattern = "#,##0." + "0" * places if places > 0 else "#,##0"
        return cast(
            str,
            numbers.format_decimal(
                value,
                format=pattern,
                locale=locale,
                decimal_quantization=True,
            ),
        )


class ByteSize(_LocaleFilter):
    """A Liquid filter for formatting byte counts.

    The value is scaled to the largest of bytes, kilobytes, megabytes or
    gigabytes (powers of 1000) that keeps it at or above one, and formatted
    with the locale's short unit names, e.g. ``1.5 MB``.

    :param locale_var: The name of a render context variable that resolves to
        the current locale. Defaults to ``"locale"``.
    :param default_locale: A fallback locale used if ``locale_var`` can not be
        resolved. Defaults to ``"en_US"``.
    :param default_format: A CLDR decimal pattern for the scaled value.
        Defaults to ``"#,##0.##"``.
    """

    def __init__(
        self,
        *,
        locale_var: str = "locale",
        default_locale: str = "en_US",
        default_format: str = "#,##0.##",
    ) -> None:
        super().__init__(locale_var=locale_var, default_locale=default_locale)
        self.default_format = default_format

    @number_filter
    def __call__(  # noqa: D102
        self,
        left: object,
        *,
        context: Context,
        length: str = "short",
    ) -> str:
        locale = self._resolve_locale(context)
        value = _to_decimal(left)
        for scale, unit in BYTE_UNITS:
            if abs(value) >= scale:
                break
        return cast(
            str,
            units.format_unit(
                value / scale,
                measurement_unit=unit,
                length=length,  # type: ignore
                format=self.default_format,
                locale=locale,
            ),
        )


@string_filter
def pad(left: str, width: object) -> str:
    """Left-align _left_ in a field _width_ characters wide."""
    return left.ljust(int_arg(width, 0))


@string_filter
def lpad(left: str, width: object) -> str:
    """Right-align _left_ in a field _width_ characters wide."""
    return left.rjust(int_arg(width, 0))
