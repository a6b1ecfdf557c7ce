"""Bundled Arabic + English stopword list used by the stopword_count signal."""

ARABIC_STOPWORDS = frozenset(
    """
    في من على الى إلى عن أن ان إن كان كانت يكون هذا هذه ذلك تلك التي الذي الذين
    لا ما مع كل قد لم لن هو هي هم هن أو او ثم حتى إذا اذا كما بين عند غير بعد
    قبل منذ لدى حول دون أي اي بعض وقد لقد ليس ليست أيضا ايضا هناك هنا به له
    لها لهم فيه فيها عليه عليها إليه اليه نحو ضد خلال أمام امام تحت فوق إذ اذ
    و ف ب ل ك ال بل لو لكن كي مما عندما حيث حين أما اما إلا الا
    """.split()
)

ENGLISH_STOPWORDS = frozenset(
    """
    the a an and or of to in on for with at by from is are was were be been
    being has have had it its this that these those as not no but if then
    than so we you they he she i me my your their our his her them us him
    what which who whom when where why how all any both each few more most
    other some such only own same too very can will just do does did doing
    """.split()
)

STOPWORDS = ARABIC_STOPWORDS | ENGLISH_STOPWORDS
