"""Argument checking and memoization helpers shared across the package"""
import inspect
import logging
from functools import wraps
from typing import (
    Any,
    Callable,
    Dict,
    List,
    Literal,
    Tuple,
    Type,
    TypeVar,
    Union,
    cast,
    get_args,
    get_origin,
    get_type_hints,
)

from .errors import InvalidInput, TacoVCError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def _matches_plain(value: Any, hint: Any) -> bool:
    if hint is Any:
        return True
    if hint is float:
        # bool is an int subclass but never a valid number argument here
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    try:
        return isinstance(value, hint)
    except TypeError:
        # TypeVars, NewTypes and other hints without runtime checks
        return True


def _matches_tuple(value: Any, args: Tuple[Any, ...]) -> bool:
    if not isinstance(value, tuple):
        return False
    if len(args) == 2 and args[1] is Ellipsis:
        return all(_matches(item, args[0]) for item in value)
    if len(value) != len(args):
        return False
    return all(_matches(item, hint) for item, hint in zip(value, args))


def _matches_dict(value: Any, args: Tuple[Any, ...]) -> bool:
    if not isinstance(value, dict):
        return False
    key_hint, value_hint = args
    return all(
        _matches(key, key_hint) and _matches(item, value_hint)
        for key, item in value.items()
    )


_GENERIC_CHECKS: Dict[Any, Callable[[Any, Tuple[Any, ...]], bool]] = {
    list: lambda value, args: isinstance(value, list)
    and all(_matches(item, args[0]) for item in value),
    tuple: _matches_tuple,
    dict: _matches_dict,
    Union: lambda value, args: any(_matches(value, hint) for hint in args),
    Literal: lambda value, args: value in args,
}


def _matches(value: Any, hint: Any) -> bool:
    """Returns True if ``value`` satisfies the (possibly generic) type ``hint``"""
    origin = get_origin(hint)
    if origin is None:
        return _matches_plain(value, hint)
    args = get_args(hint)
    check = _GENERIC_CHECKS.get(origin)
    if check is not None and args:
        return check(value, args)
    return _matches_plain(value, origin)


def narrow_types(
    func: Callable[..., T] = None, *, error: Type[TacoVCError] = InvalidInput
):
    """Checks call arguments against the decorated function's type hints

    Public operations are wrapped with this so that passing e.g. a raw
    array where a :class:`.Waveform` belongs raises a :class:`.TacoVCError`
    at the call site. Only annotated parameters are checked, return values
    are not. Integers are accepted for ``float`` hints, booleans are not.

    Can be used bare (``@narrow_types``) or with a custom exception type
    (``@narrow_types(error=InvalidConfig)``).

    :param func: Decorated function when used without arguments
    :param error: Exception type raised on a mismatch
    :return: Wrapped function
    :raise error: If any annotated argument has the wrong type
    """

    def decorate(method: Callable[..., T]) -> Callable[..., T]:
        signature = inspect.signature(method)
        hints: List[Dict[str, Any]] = []

        def resolved_hints() -> Dict[str, Any]:
            # Resolved on first call so forward references can be defined later
            if not hints:
                found = get_type_hints(method)
                found.pop("return", None)
                hints.append(found)
            return hints[0]

        @wraps(method)
        def wrapper(*args, **kwargs):
            bound = signature.bind(*args, **kwargs)
            bound.apply_defaults()
            annotated = resolved_hints()
            wrong = [
                f"{name}: expected {annotated[name]}, got {type(value).__name__}"
                for name, value in bound.arguments.items()
                if name in annotated and not _matches(value, annotated[name])
            ]
            if wrong:
                message = f"Bad arguments to {method.__name__}: {'; '.join(wrong)}"
                logger.debug(message)
                raise error(message)
            return method(*args, **kwargs)

        return cast(Callable[..., T], wrapper)

    return decorate if func is None else decorate(func)


def cache_if(predicate: Callable[[Any], bool]):
    """Memoizes a method on its instance until ``predicate`` says it is stale

    The result is stored on the instance under the method name with a leading
    underscore. The wrapped method runs on the first call and again whenever
    ``predicate(instance)`` is True. Stack under ``@property`` for cached
    attributes:

    .. code-block:: python

        @property
        @cache_if(_recognizer_changed)
        def recognizer(self) -> ModelCheckpoint:
            ...

    .. warning::
        The predicate must not read the cached property itself, read the
        underscored attribute instead.

    :param predicate: Called with the instance, True to recompute
    """

    def decorate(method):
        slot = f"_{method.__name__}"

        @wraps(method)
        def wrapper(self, *args, **kwargs):
            if not hasattr(self, slot) or predicate(self):
                setattr(self, slot, method(self, *args, **kwargs))
            return getattr(self, slot)

        return wrapper

    return decorate
